/* 99-char string strcpy'd into a 50-char stack buffer. */
#include <string.h>

#include "io.h"

static void bad(void)
{
    char * data;
    char dataBadBuffer[50];
    data = dataBadBuffer;
    data[0] = '\0';
    {
        char source[100];
        memset(source, 'C', 100-1);
        source[100-1] = '\0';
        strcpy(data, source);
        printLine(data);
    }
}

int main(void)
{
    printLine("Calling bad()...");
    bad();
    printLine("Finished bad()");
    return 0;
}
